//! Command-line subcommands.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use plangen_core::corpus::{plan_variants, split, synth_generate, SynthConfig};
use plangen_core::data::{ContentPlan, TrainingExample};
use plangen_core::delex::reference_plan;
use plangen_core::generator::{
    continue_training, decode, train_generator, DecodeConfig, DecodeStrategy, GeneratorConfig, GeneratorTrainConfig,
};
use plangen_core::metrics::{evaluate, EvalItem};
use plangen_core::planner::{train_planner, PlannerConfig, PlannerTrainConfig};
use plangen_core::rl::{rl_finetune, Baseline, RLConfig};
use plangen_core::tokenize::tokenize;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{load_generator, load_planner, save_generator, save_planner};
use crate::jsonl::{load_entries, load_jsonl, read_lines, save_entries, save_jsonl, write_lines};
use crate::service::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "plangen", version, about = "Plan-conditioned data-to-text toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus as train/dev/test JSONL files.
    MakeData {
        /// JSON SynthConfig; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        dev: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        /// Plan reorderings per training example, written to
        /// `train_variants.jsonl` for generator training.
        #[arg(long, default_value_t = 1)]
        variants: usize,
    },
    /// Fill every line's "plan" from its text with the delexicalizer.
    Delex {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    TrainPlanner {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Predict plans; writes {"plan", "ordering"} per line.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    TrainGen {
        /// One or more training files, concatenated.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Rewritten after every epoch.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        d_model: Option<usize>,
        /// Continue from an existing generator checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    RlFinetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lr: Option<f64>,
        /// Moving-average reward baseline decay; no baseline when absent.
        #[arg(long)]
        baseline_decay: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode outputs; writes {"plan", "outputs"} per line.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Planner used when neither --plan nor the line's plan is given.
        #[arg(long)]
        planner: Option<PathBuf>,
        /// Comma-separated plan tokens applied to every line.
        #[arg(long)]
        plan: Option<String>,
        #[arg(long, value_enum, default_value_t = Strategy::Greedy)]
        strategy: Strategy,
        #[arg(long, default_value_t = 10)]
        width: usize,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 0.9)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        num_outputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        max_length: usize,
    },
    Eval {
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Predicted plans for planning accuracy and BLEU-2.
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        planner: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Greedy,
    Beam,
    Topk,
    Nucleus,
}

/// One line of `generate` output and `eval` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<String>>,
    pub outputs: Vec<String>,
}

/// One line of `plan` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLine {
    pub plan: Vec<String>,
    pub ordering: Vec<Option<usize>>,
}

fn examples(path: &Path) -> Result<Vec<TrainingExample>> {
    load_jsonl(path).with_context(|| format!("loading {}", path.display()))
}

fn optional_examples(path: Option<&PathBuf>) -> Result<Vec<TrainingExample>> {
    path.map(|p| examples(p)).transpose().map(Option::unwrap_or_default)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeData { config, out_dir, dev, test, variants } => {
            let cfg: SynthConfig = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => SynthConfig::default(),
            };
            let (train, dv, ts) = split(synth_generate(&cfg)?, dev, test)?;
            fs::create_dir_all(&out_dir)?;
            for (name, set) in [("train", &train), ("dev", &dv), ("test", &ts)] {
                save_jsonl(set, &out_dir.join(format!("{name}.jsonl")))?;
            }
            if variants > 0 {
                save_jsonl(&plan_variants(&train, variants, cfg.seed)?, &out_dir.join("train_variants.jsonl"))?;
            }
            eprintln!("wrote {} train, {} dev, {} test examples to {}", train.len(), dv.len(), ts.len(), out_dir.display());
        }
        Command::Delex { data, out } => {
            let mut entries = load_entries(&data)?;
            for (i, e) in entries.iter_mut().enumerate() {
                let text = e.text.as_ref().with_context(|| format!("line {}: missing \"text\"", i + 1))?;
                e.plan = Some(reference_plan(&e.data, text));
            }
            save_entries(&entries, &out)?;
        }
        Command::TrainPlanner { data, dev, out, seed, epochs, lr, hidden } => {
            let train = examples(&data)?;
            let dev = optional_examples(dev.as_ref())?;
            let defaults = PlannerTrainConfig::default();
            let tc = PlannerTrainConfig {
                epochs: epochs.unwrap_or(defaults.epochs),
                learning_rate: lr.unwrap_or(defaults.learning_rate),
                ..defaults
            };
            let config = PlannerConfig { hidden: hidden.unwrap_or(PlannerConfig::default().hidden), ..Default::default() };
            let (model, history) = train_planner(&train, &dev, config, &tc, seed, |e| {
                eprintln!("epoch {} train loss {:.4} dev accuracy {:?}", e.epoch, e.train_loss, e.dev_accuracy)
            })?;
            save_planner(&model, json!({ "seed": seed, "train": tc, "history": history }), &out)?;
        }
        Command::Plan { model, data, out } => {
            let planner = load_planner(&model)?;
            let entries = load_entries(&data)?;
            let mut lines = Vec::with_capacity(entries.len());
            for e in &entries {
                let (ordering, plan) = planner.predict(&e.data)?;
                lines.push(PlanLine {
                    plan: plan.tokens(&e.data),
                    ordering: ordering.labels.iter().map(|&l| (l > 0).then_some(l)).collect(),
                });
            }
            write_lines(&out, &lines)?;
        }
        Command::TrainGen { data, dev, out, seed, epochs, lr, d_model, init } => {
            let mut train = Vec::new();
            for path in &data {
                train.extend(examples(path)?);
            }
            let dev = optional_examples(dev.as_ref())?;
            let defaults = GeneratorTrainConfig::default();
            let tc = GeneratorTrainConfig {
                epochs: epochs.unwrap_or(defaults.epochs),
                learning_rate: lr.unwrap_or(defaults.learning_rate),
                ..defaults
            };
            let mut failure = None;
            let on_epoch = |e: &plangen_core::generator::GeneratorEpoch, m: &_| {
                eprintln!("epoch {} ({} steps) train loss {:.4} dev loss {:?}", e.epoch, e.steps, e.train_loss, e.dev_loss);
                if let Err(err) = save_generator(m, json!({ "seed": seed, "train": tc, "epoch": e }), &out) {
                    failure.get_or_insert(err);
                }
            };
            match init {
                Some(p) => {
                    continue_training(load_generator(&p)?, &train, &dev, &tc, seed, on_epoch)?;
                }
                None => {
                    let d = d_model.unwrap_or(GeneratorConfig::default().d_model);
                    let config = GeneratorConfig { d_model: d, ffn: 2 * d, ..Default::default() };
                    train_generator(&train, &dev, config, &tc, seed, on_epoch)?;
                }
            }
            if let Some(err) = failure {
                return Err(err.into());
            }
        }
        Command::RlFinetune { model, data, steps, seed, lr, baseline_decay, out } => {
            let train = examples(&data)?;
            let generator = load_generator(&model)?;
            let defaults = RLConfig::default();
            let cfg = RLConfig {
                steps,
                seed,
                learning_rate: lr.unwrap_or(defaults.learning_rate),
                baseline: baseline_decay.map_or(Baseline::None, |decay| Baseline::MovingAverage { decay }),
                ..defaults
            };
            let (model, history) = rl_finetune(generator, &train, &cfg, |s| {
                if s.step % 50 == 0 {
                    eprintln!("step {} lm loss {:.4} mean reward {:.4}", s.step, s.lm_loss, s.mean_reward);
                }
            })?;
            let last = history.last().copied();
            save_generator(&model, json!({ "rl": cfg, "last_step": last }), &out)?;
        }
        Command::Generate { model, data, out, planner, plan, strategy, width, k, p, num_outputs, seed, max_length } => {
            let generator = load_generator(&model)?;
            let planner = planner.map(|p| load_planner(&p)).transpose()?;
            let strategy = match strategy {
                Strategy::Greedy => DecodeStrategy::Greedy,
                Strategy::Beam => DecodeStrategy::Beam { width },
                Strategy::Topk => DecodeStrategy::TopK { k },
                Strategy::Nucleus => DecodeStrategy::Nucleus { p },
            };
            let cfg = DecodeConfig { strategy, seed, max_length, num_outputs };
            cfg.validate(generator.vocab().len())?;
            let fixed: Option<Vec<String>> = plan.map(|s| s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect());
            let entries = load_entries(&data)?;
            let mut lines = Vec::with_capacity(entries.len());
            for (i, e) in entries.iter().enumerate() {
                let plan = match (&fixed, &planner, &e.plan) {
                    (Some(tokens), _, _) => ContentPlan::resolve(tokens, &e.data).with_context(|| format!("line {}", i + 1))?,
                    (None, Some(pl), _) => pl.predict_plan(&e.data)?,
                    (None, None, Some(p)) => p.clone(),
                    (None, None, None) => bail!("line {}: no plan given and no --planner", i + 1),
                };
                let outputs = decode(&generator, &e.data, &plan, &cfg)?;
                lines.push(HypLine { plan: Some(plan.tokens(&e.data)), outputs: outputs.iter().map(|o| o.join(" ")).collect() });
            }
            write_lines(&out, &lines)?;
        }
        Command::Eval { hyps, data, plans, report } => {
            let refs = examples(&data)?;
            let hyps: Vec<HypLine> = read_lines(&hyps, |l| serde_json::from_str(l).map_err(|e| e.to_string()))?;
            if hyps.len() != refs.len() {
                bail!("{} hypothesis lines for {} examples", hyps.len(), refs.len());
            }
            let outputs: Vec<Vec<Vec<String>>> = hyps.iter().map(|h| h.outputs.iter().map(|o| tokenize(o)).collect()).collect();
            let ref_plans: Vec<Vec<String>> = refs.iter().map(|e| e.plan.tokens(&e.data)).collect();
            let cond: Vec<Vec<String>> = hyps.iter().zip(&ref_plans).map(|(h, r)| h.plan.clone().unwrap_or_else(|| r.clone())).collect();
            let items: Vec<EvalItem<'_>> = refs
                .iter()
                .enumerate()
                .map(|(i, e)| EvalItem { data: &e.data, reference: &e.text, plan: &cond[i], outputs: &outputs[i] })
                .collect();
            let predicted: Option<Vec<Vec<String>>> = plans
                .map(|p| read_lines(&p, |l| serde_json::from_str::<PlanLine>(l).map(|x| x.plan).map_err(|e| e.to_string())))
                .transpose()?;
            let rep = evaluate(&items, predicted.as_deref().map(|p| (p, ref_plans.as_slice())))?;
            fs::write(&report, serde_json::to_string_pretty(&rep)?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Serve { port, host, planner, generator } => {
            let state = AppState {
                planner: planner.map(|p| load_planner(&p)).transpose()?.map(Arc::new),
                generator: generator.map(|p| load_generator(&p)).transpose()?.map(Arc::new),
            };
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(serve(state, addr))?;
        }
    }
    Ok(())
}
