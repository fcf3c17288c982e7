//! Command-line front end. Every subcommand reads the shared flat config
//! (`--config FILE`, `--set key=value`) and echoes the effective values into
//! what it writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nlmaps_core::config::RunConfig;
use nlmaps_core::corpus::{self, Example, SplitSet};
use nlmaps_core::dialogue::{self, DialogueRecord};
use nlmaps_core::metrics::{self, EvalReport, RunRecord};
use nlmaps_core::seq2seq::{Model, TrainPair};
use nlmaps_core::{uncertainty, Model64};
use serde_json::json;

use crate::api::{self, AppState};
use crate::finetune;
use crate::store::{self, TaskStore};

#[derive(Debug, Parser)]
#[command(
    name = "nlmaps",
    version,
    about = "Interactive semantic parsing for OpenStreetMap queries"
)]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove dev/test examples that duplicate a training example after masking.
    Dedup {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Output directory for the filtered splits and stats.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a parser on a TSV corpus or on dialogue records (JSONL).
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss/accuracy CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Parse one query and optionally ask for clarification.
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        clarify: bool,
    },
    /// Build synthetic-dialogue records for every split with a baseline model.
    GenDialogues {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact match and F1 of a model on TSV or JSONL data.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// System name in the report table.
        #[arg(long, default_value = "model")]
        name: String,
        /// Write per-example predictions for `significance`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired approximate randomization test between two prediction files.
    Significance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-character entropy of the greedy parse as CSV.
    EntropyDump {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select mistaken or ambiguous parses as annotation tasks.
    FilterTasks {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Data for the entropy quantile when no fixed `tau` is configured.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Dialogue records holding the served hypotheses, for `finetune`.
        #[arg(long)]
        records: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Train on logged markings with the weighted objective.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        feedback: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        held_out: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Cli {
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

fn load_model(path: &Path) -> Result<Model64> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn record_from_example(ex: Example) -> DialogueRecord {
    DialogueRecord {
        id: ex.id,
        question: ex.question,
        hypothesis: String::new(),
        dialogue: dialogue::join_dialogue("", ""),
        logged_answer: None,
        target: ex.gold,
    }
}

/// Dialogue records from JSONL, or question-only records from TSV.
pub fn load_records(path: &Path) -> Result<Vec<DialogueRecord>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(dialogue::read_jsonl(path)?)
    } else {
        Ok(corpus::load_tsv(path)?
            .into_iter()
            .map(record_from_example)
            .collect())
    }
}

fn pairs(records: &[DialogueRecord], arity: usize) -> Vec<TrainPair> {
    records
        .iter()
        .map(|r| TrainPair::new(r.sources(arity), r.target.clone()))
        .collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn predictions(model: &Model64, records: &[DialogueRecord]) -> Result<Vec<RunRecord>> {
    let arity = model.encoders();
    records
        .iter()
        .map(|r| {
            let hyp = model.decode_greedy(&r.sources(arity))?;
            Ok(RunRecord {
                id: r.id.clone(),
                prediction: hyp.text,
                gold: r.target.clone(),
            })
        })
        .collect()
}

fn report_of(runs: &[RunRecord]) -> Result<EvalReport> {
    let pred: Vec<&str> = runs.iter().map(|r| r.prediction.as_str()).collect();
    let gold: Vec<&str> = runs.iter().map(|r| r.gold.as_str()).collect();
    Ok(metrics::f1_report(&pred, &gold)?)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.effective_config()?;
    let echo = cfg.to_json();
    match &cli.command {
        Command::Dedup {
            train,
            dev,
            test,
            out: dir,
        } => {
            let splits = SplitSet::new(
                corpus::load_tsv(train)?,
                corpus::load_tsv(dev)?,
                corpus::load_tsv(test)?,
            );
            let (kept, report) = corpus::dedup(&splits);
            fs::create_dir_all(dir)?;
            corpus::write_tsv(dir.join("train.tsv"), &kept.train)?;
            corpus::write_tsv(dir.join("dev.tsv"), &kept.dev)?;
            corpus::write_tsv(dir.join("test.tsv"), &kept.test)?;
            let stats = json!({ "before": splits.stats(), "after": kept.stats(), "removed": report, "config": echo });
            write_json(&dir.join("stats.json"), &stats)?;
            write!(out, "{}", kept.stats())?;
        }
        Command::Train {
            train,
            dev,
            out: path,
            trace,
        } => {
            let arity = cfg.model.encoders;
            let data = pairs(&load_records(train)?, arity);
            let (model, report) = nlmaps_core::seq2seq::train_supervised::<f64>(
                &data,
                cfg.model.clone(),
                &cfg.train,
            )?;
            let mut summary = json!({
                "updates": report.updates,
                "final_loss": report.final_loss(),
                "train_exact_match": report.final_exact_match(),
            });
            if let Some(dev) = dev {
                let runs = predictions(&model, &load_records(dev)?)?;
                summary["dev"] = serde_json::to_value(report_of(&runs)?)?;
            }
            model.save(path, json!({ "config": echo, "train": summary }))?;
            if let Some(trace) = trace {
                fs::write(trace, report.to_csv())?;
            }
            writeln!(out, "{}", serde_json::to_string(&summary)?)?;
        }
        Command::Parse {
            model,
            query,
            clarify,
        } => {
            let model = load_model(model)?;
            let resp = api::parse_query(&model, query).map_err(|e| anyhow::anyhow!("{e:?}"))?;
            let mut value = json!({ "parse": resp.parse, "keyvals": resp.keyvals, "token_entropies": resp.token_entropies });
            if *clarify {
                value["question"] = json!(resp.clarification.as_ref().map(|c| c.question.clone()));
                value["clarification"] = serde_json::to_value(&resp.clarification)?;
            }
            writeln!(out, "{}", serde_json::to_string(&value)?)?;
        }
        Command::GenDialogues {
            model,
            train,
            dev,
            test,
            out: dir,
        } => {
            let model = load_model(model)?;
            let splits = SplitSet::new(
                corpus::load_tsv(train)?,
                corpus::load_tsv(dev)?,
                corpus::load_tsv(test)?,
            );
            let records = dialogue::build_dialogue_corpus(&model, &splits)?;
            fs::create_dir_all(dir)?;
            let mut answered = serde_json::Map::new();
            for (name, recs) in [
                ("train", &records.train),
                ("dev", &records.dev),
                ("test", &records.test),
            ] {
                dialogue::write_jsonl(dir.join(format!("{name}.jsonl")), recs)?;
                answered.insert(
                    name.into(),
                    json!(recs.iter().filter(|r| r.is_answered()).count()),
                );
            }
            let stats = json!({ "records": records.stats(), "answered": answered, "config": echo });
            write_json(&dir.join("stats.json"), &stats)?;
            writeln!(out, "{}", serde_json::to_string(&stats["answered"])?)?;
        }
        Command::Eval {
            model,
            data,
            name,
            out: path,
        } => {
            let model = load_model(model)?;
            let runs = predictions(&model, &load_records(data)?)?;
            let report = report_of(&runs)?;
            if let Some(path) = path {
                dialogue::write_jsonl(path, &runs)?;
            }
            write!(out, "{}", EvalReport::table(&[(name, &report)]))?;
        }
        Command::Significance { a, b, rounds, seed } => {
            let ra: Vec<RunRecord> = dialogue::read_jsonl(a)?;
            let rb: Vec<RunRecord> = dialogue::read_jsonl(b)?;
            if ra.len() != rb.len() {
                bail!(
                    "{} has {} records but {} has {}",
                    a.display(),
                    ra.len(),
                    b.display(),
                    rb.len()
                );
            }
            if let Some((x, y)) = ra.iter().zip(&rb).find(|(x, y)| x.id != y.id) {
                bail!("runs are not aligned: `{}` vs `{}`", x.id, y.id);
            }
            let score = |rs: &[RunRecord]| {
                rs.iter()
                    .map(|r| f64::from(u8::from(r.is_correct())))
                    .collect::<Vec<_>>()
            };
            let (sa, sb) = (score(&ra), score(&rb));
            let rounds = rounds.unwrap_or(cfg.run.rounds);
            let seed = seed.unwrap_or(cfg.run.significance_seed);
            let p = metrics::approx_randomization(&sa, &sb, metrics::mean, rounds, seed)?;
            let value = json!({
                "p": p, "rounds": rounds, "seed": seed, "n": sa.len(),
                "accuracy_a": metrics::mean(&sa), "accuracy_b": metrics::mean(&sb),
            });
            writeln!(out, "{}", serde_json::to_string(&value)?)?;
        }
        Command::EntropyDump {
            model,
            query,
            out: path,
        } => {
            let model = load_model(model)?;
            let mut sources = vec![query.clone()];
            sources.resize(model.encoders(), String::new());
            let csv = uncertainty::entropy_csv(&model.decode_greedy(&sources)?);
            match path {
                Some(p) => fs::write(p, csv)?,
                None => write!(out, "{csv}")?,
            }
        }
        Command::FilterTasks {
            model,
            data,
            dev,
            out: path,
            records,
        } => {
            let model = load_model(model)?;
            let examples = corpus::load_tsv(data)?;
            let tau = match cfg.run.tau {
                Some(t) => t,
                None => {
                    let reference = match dev {
                        Some(d) => corpus::load_tsv(d)?,
                        None => examples.clone(),
                    };
                    dialogue::entropy_threshold(&model, &reference, cfg.run.tau_quantile)?
                }
            };
            let tasks = dialogue::filter_annotation_tasks(&model, &examples, tau)?;
            let gold: std::collections::HashMap<&str, &str> = examples
                .iter()
                .map(|e| (e.id.as_str(), e.gold.as_str()))
                .collect();
            let recs: Vec<DialogueRecord> = tasks
                .iter()
                .map(|t| DialogueRecord {
                    id: t.id.clone(),
                    question: t.question.clone(),
                    hypothesis: t.hypothesis.clone(),
                    dialogue: dialogue::join_dialogue(&t.clarification.question, ""),
                    logged_answer: None,
                    target: gold[t.id.as_str()].to_string(),
                })
                .collect();
            store::write_tasks(path, &tasks)?;
            dialogue::write_jsonl(records, &recs)?;
            let mistakes = tasks.iter().filter(|t| t.mistake).count();
            let value = json!({ "tau": tau, "examples": examples.len(), "tasks": tasks.len(), "mistakes": mistakes, "config": echo });
            writeln!(out, "{}", serde_json::to_string(&value)?)?;
        }
        Command::Serve {
            model,
            tasks,
            log,
            addr,
        } => {
            let model = model.as_deref().map(load_model).transpose()?;
            let store = TaskStore::open(tasks, log)?;
            let state = AppState::new(model, store);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                api::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Finetune {
            model,
            feedback,
            records,
            held_out,
            out: path,
        } => {
            let model = load_model(model)?;
            let fb = store::read_feedback(feedback)?;
            let recs: Vec<DialogueRecord> = dialogue::read_jsonl(records)?;
            let held = load_records(held_out)?;
            let (tuned, summary) = finetune::finetune(&model, &fb, &recs, &held, &cfg.train)?;
            let summary = serde_json::to_value(&summary)?;
            tuned.save(path, json!({ "config": echo, "finetune": summary }))?;
            let table = EvalReport::table(&[
                (
                    "before",
                    &serde_json::from_value(summary["before"].clone())?,
                ),
                ("after", &serde_json::from_value(summary["after"].clone())?),
            ]);
            write!(out, "{table}")?;
        }
    }
    Ok(())
}
