use std::fs;
use std::path::Path;

use clap::Parser;
use plangen::commands::{run, Cli, HypLine, PlanLine};
use plangen::jsonl::{load_entries, load_jsonl};

fn exec(args: &[&str]) -> anyhow::Result<()> {
    let mut argv = vec!["plangen"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv)?)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn full_pipeline_on_a_small_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("synth.json");
    fs::write(&cfg, r#"{"num_examples": 60, "seed": 3}"#).unwrap();
    exec(&["make-data", "--config", p(&cfg), "--out-dir", p(d), "--dev", "10", "--test", "10"]).unwrap();
    let (train, dev, test) = (d.join("train.jsonl"), d.join("dev.jsonl"), d.join("test.jsonl"));
    assert_eq!(load_jsonl(&train).unwrap().len(), 40);
    assert_eq!(load_jsonl(&test).unwrap().len(), 10);
    let variants = d.join("train_variants.jsonl");
    assert!(load_jsonl(&variants).unwrap().len() > 30);

    let delexed = d.join("delexed.jsonl");
    exec(&["delex", "--data", p(&test), "--out", p(&delexed)]).unwrap();
    assert_eq!(load_jsonl(&delexed).unwrap(), load_jsonl(&test).unwrap());

    let planner = d.join("planner.ckpt");
    exec(&["train-planner", "--data", p(&train), "--dev", p(&dev), "--out", p(&planner), "--epochs", "1", "--hidden", "8"]).unwrap();
    let plans = d.join("plans.jsonl");
    exec(&["plan", "--model", p(&planner), "--data", p(&test), "--out", p(&plans)]).unwrap();
    let lines: Vec<PlanLine> = fs::read_to_string(&plans).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);

    let generator = d.join("gen.ckpt");
    exec(&["train-gen", "--data", p(&train), p(&variants), "--dev", p(&dev), "--out", p(&generator), "--epochs", "1", "--d-model", "16"])
        .unwrap();
    exec(&["train-gen", "--data", p(&train), "--out", p(&generator), "--epochs", "1", "--init", p(&generator)]).unwrap();
    let tuned = d.join("rl.ckpt");
    exec(&["rl-finetune", "--model", p(&generator), "--data", p(&train), "--steps", "2", "--baseline-decay", "0.9", "--out", p(&tuned)])
        .unwrap();

    let hyps = d.join("hyps.jsonl");
    exec(&[
        "generate",
        "--model",
        p(&tuned),
        "--data",
        p(&test),
        "--planner",
        p(&planner),
        "--out",
        p(&hyps),
        "--strategy",
        "beam",
        "--width",
        "3",
        "--num-outputs",
        "2",
        "--max-length",
        "12",
    ])
    .unwrap();
    let out: Vec<HypLine> = fs::read_to_string(&hyps).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(out.len(), 10);
    assert!(out.iter().zip(&lines).all(|(h, pl)| h.outputs.len() == 2 && h.plan.as_ref() == Some(&pl.plan)));

    let report = d.join("report.json");
    exec(&["eval", "--hyps", p(&hyps), "--data", p(&test), "--plans", p(&plans), "--report", p(&report)]).unwrap();
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["bleu4", "s_bleu", "self_bleu", "ibleu", "plan_accuracy", "plan_bleu2"] {
        assert!(rep[key].is_number(), "{key} missing from {rep}");
    }
}

#[test]
fn generate_with_a_fixed_plan_and_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let data = fixtures.join("alan_bean_plans.jsonl");
    let generator = d.join("gen.ckpt");
    exec(&["train-gen", "--data", p(&data), "--out", p(&generator), "--epochs", "1", "--d-model", "8"]).unwrap();

    let hyps = d.join("hyps.jsonl");
    exec(&["generate", "--model", p(&generator), "--data", p(&data), "--plan", "status, nationality", "--out", p(&hyps)]).unwrap();
    let first: HypLine = serde_json::from_str(fs::read_to_string(&hyps).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first.plan.unwrap(), ["status", "nationality"]);

    // lines without a plan need a planner
    let bare = fixtures.join("alan_bean.jsonl");
    assert!(load_entries(&bare).unwrap()[0].plan.is_none());
    let err = exec(&["generate", "--model", p(&generator), "--data", p(&bare), "--out", p(&hyps)]).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");

    assert!(exec(&["generate", "--model", p(&generator), "--data", p(&data), "--plan", "Year", "--out", p(&hyps)]).is_err());
    assert!(exec(&["plan", "--model", p(&generator), "--data", p(&data), "--out", p(&hyps)]).is_err());
    assert!(exec(&["generate", "--model", p(&generator), "--data", p(&data), "--out", p(&hyps), "--strategy", "sideways"]).is_err());
}
